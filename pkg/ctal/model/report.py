"""
Parameter accounting. Counts come from instantiating the model with zero
storage, so they are exact sums over the enumerable parameters.

`count_parameters` leaves out the vocabulary-sized tensors (the token
embedding table and the MLM output projection): their size depends on the
tokenizer rather than on the architecture. `parameter_report` carries both
numbers.
"""
from dataclasses import dataclass

import numpy as np
import pandas as pd

from ctal.model.ctal_model import CtalModel

VOCAB_DEPENDENT = (
    "text_embeddings.token.weight",
    "mlm_head.decoder.weight",
    "mlm_head.decoder.bias",
    "mlm_head.decoder_bias",
)


@dataclass
class ParameterReport:
    table: pd.DataFrame
    by_submodule: pd.Series
    total: int
    vocab_dependent: int

    @property
    def architecture_total(self):
        return self.total - self.vocab_dependent


def parameter_table(model):
    rows = []
    for name, param in model.named_parameters():
        rows.append({
            "name": name,
            "submodule": name.split(".")[0],
            "shape": "x".join(str(n) for n in param.shape),
            "count": int(np.prod(param.shape, dtype=np.int64)),
            "vocab_dependent": name in VOCAB_DEPENDENT,
        })
    return pd.DataFrame(rows, columns=["name", "submodule", "shape", "count", "vocab_dependent"])


def report_for_model(model):
    table = parameter_table(model)
    by_submodule = table.groupby("submodule", sort=False)["count"].sum()
    return ParameterReport(table, by_submodule, int(table["count"].sum()),
                           int(table.loc[table["vocab_dependent"], "count"].sum()))


def parameter_report(config, pretraining_heads=True):
    return report_for_model(CtalModel(config, pretraining_heads=pretraining_heads, initialize=False))


def count_parameters(config):
    """Architecture parameters, excluding the vocabulary-sized tensors."""
    return parameter_report(config).architecture_total
