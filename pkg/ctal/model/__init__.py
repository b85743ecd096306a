from ctal.model.registry import make, register, registry, spec
from ctal.model.config import ModelConfig
from ctal.model.batch import PairBatch, collate
from ctal.model.ctal_model import CtalModel, CtalOutput
from ctal.model.checkpoint import Checkpoint, load_checkpoint, load_pretrained, save_checkpoint
from ctal.model.report import count_parameters, parameter_report

register(
    id='ctal-base',
    entry_point='ctal.model.config:CtalBaseConfig',
)

register(
    id='ctal-large',
    entry_point='ctal.model.config:CtalLargeConfig',
)

register(
    id='ctal-tiny',
    entry_point='ctal.model.config:CtalTinyConfig',
)
