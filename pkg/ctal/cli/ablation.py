"""
The ablation grid: the full recipe, then one component removed at a time,
each fine-tuned and scored per seed.
"""
import logging
import os
from dataclasses import replace

import pandas as pd

from ctal.finetune.heads import LabelMap
from ctal.finetune.trainer import FineTuner, build_model, evaluate
from ctal.model.checkpoint import Checkpoint
from ctal.model.ctal_model import CtalModel
from ctal.pretrain.trainer import run_pretraining

logger = logging.getLogger(__name__)

# setting -> (pre-training switches or None for no pre-training, fine-tuning overrides)
SETTINGS = {
    "full": ({"use_mlm": True, "use_mcam": True}, {}),
    "no_pretraining": (None, {}),
    "no_mlm": ({"use_mlm": False, "use_mcam": True}, {}),
    "no_mcam": ({"use_mlm": True, "use_mcam": False}, {}),
    "no_orthogonal": ({"use_mlm": True, "use_mcam": True}, {"orthogonal_weight": 0.0}),
    "text_only": ({"use_mlm": True, "use_mcam": True}, {"fusion": "text_only"}),
    "audio_only": ({"use_mlm": True, "use_mcam": True}, {"fusion": "audio_only"}),
}


def run_ablation(run_config, train, test, seeds, settings=tuple(SETTINGS), run_dir=None):
    """
    :param train: PairDataset with labels, also used for pre-training
    :param test: labelled PairDataset scored after fine-tuning
    :return: DataFrame with one row per (setting, seed)
    """
    label_map = LabelMap.fit(run_config.task, train.labels)
    model_config = run_config.model_config(train.vocab.size)
    rows = []
    for seed in seeds:
        pretrained = {}
        for setting in settings:
            switches, overrides = SETTINGS[setting]
            checkpoint = None
            if switches is not None:
                key = tuple(sorted(switches.items()))
                if key not in pretrained:
                    logger.info("Pre-training %s for seed %d", dict(key), seed)
                    model = CtalModel(model_config, seed=seed)
                    run_pretraining(replace(run_config.pretrain_config(), seed=seed, **switches), train, model)
                    pretrained[key] = Checkpoint.from_model(model)
                checkpoint = pretrained[key]
            finetune = replace(run_config.finetune_config(), seed=seed, **overrides)
            model = build_model(model_config, label_map, finetune.fusion, checkpoint, seed=seed)
            FineTuner(model, label_map, finetune).train(train)
            report, _ = evaluate(model, test, label_map, finetune.eval_batch_size, finetune.threads)
            logger.info("%s seed %d: %s", setting, seed, report)
            rows.append(dict(setting=setting, seed=seed, **report))

    results = pd.DataFrame(rows)
    if run_dir is not None:
        results.to_csv(os.path.join(run_dir, "ablation.csv"), index=False)
    summary = results.drop(columns="seed").groupby("setting", sort=False).median()
    logger.info("Median over %d seeds:\n%s", len(seeds), summary.to_string())
    return results
