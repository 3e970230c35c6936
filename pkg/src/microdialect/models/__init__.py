"""Architectures, training procedures and checkpoints."""
from .bigru import (ARCHS, GEO_TASKS, BiGRUConfig, BiGRUNet, HaMtlConfig, InvalidConfig,
                    build_ha_mtl, build_mtl_flat, build_single_task_bigru, expected_param_count)
from .checkpoint import Checkpoint, CheckpointError, checkpoint_from_model, model_from_checkpoint
from .distill import DistillReport, LabelSetMismatch, distill
from .encoder import (EncoderConfig, SequenceTooLong, TinyEncoder, build_tiny_encoder,
                      select_mask_positions)
from .mlm import EmptyCorpus, pretrain_mlm
from .training import (EarlyStopping, Example, LabelOutOfRange, NoMainTask, Prediction, TaskData,
                       TrainConfig, finetune, label_sets, make_examples, mtl_finetune, predict,
                       proportional_schedule)
from .vocab import Vocab, VocabMismatch
