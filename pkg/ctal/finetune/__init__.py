from ctal.finetune.metrics import (cosine_similarity_matrix, error_rates, metric_acc2_f1, metric_eer, metric_mae_corr,
                                   metric_wa_ua, trial_scores)
from ctal.finetune.fusion import FUSION_MODES, AttentionPooling, FusedRepresentation, fuse, orthogonal_loss, pool_streams
from ctal.finetune.heads import TASKS, LabelMap, TaskHead, finetune_loss, task_variant
from ctal.finetune.model import CtalForFinetuning, extract_identity_embedding
from ctal.finetune.trainer import (FinetuneConfig, FineTuner, build_model, embedding_checkpoint, evaluate,
                                   finetuned_checkpoint, load_finetuned, predict, score_predictions)
