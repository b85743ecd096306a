from ctal.pretrain.masking import (IGNORE_INDEX, Action, MaskedTargets, MaskingPlanner, McamPlan, MlmPlan,
                                   apply_plans, plan_mcam, plan_mlm, utterance_rng)
from ctal.pretrain.objectives import PretrainLosses, mcam_loss, mlm_loss, pretraining_losses
from ctal.pretrain.trainer import PretrainConfig, Pretrainer, pretrain_step, run_pretraining
