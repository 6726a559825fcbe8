"""Dual-encoder, permutation-augmented graph anomaly detection."""
from .augmentation import PermutationPlan, SampleBatch, build_batch, draw_permutation
from .detector import (DagadModel, TrainConfig, TrainReport, forward, load_checkpoint, predict,
                       save_checkpoint, train)
from .encoders import EncoderOutput, gat_forward, gcn_forward, init_params
from .errors import BundleError, CheckpointError, ConfigError, DagadError, NumericalError
from .evaluation import aggregate_runs, confusion, macro_metrics, roc_auc
from .graph import (AttributedGraph, DataSplit, DatasetBundle, LabelSet, inject_anomalies,
                    load_bundle, make_split, normalized_propagation_matrix, random_graph,
                    save_bundle)
from .kernels import BACKEND
from .losses import (LossBreakdown, LossConfig, ProbBatch, ce_classwise, ce_instance,
                     gce_classwise, gce_instance, gradient_barrier, omega, total_loss)

__version__ = "0.1.0"
