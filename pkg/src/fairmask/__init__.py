"""Fairness-directed search over which modules of a pretrained network to fine-tune."""
from .data import REFERENCE_SYNTH, SOURCE_SYNTH, Dataset, SplitRatios, SynthConfig, generate_synthetic, load_csv, split
from .errors import FairmaskError
from .metrics import ObjectiveKind, SubgroupReport, auroc, dp_diff, eodds_diff, fair_objective, subgroup_report
from .model import Architecture, ModelParams, backward, forward, init_random, load_checkpoint, save_checkpoint
from .orchestrator import RunConfig, RunResult, mask_frequency, run_baselines, run_search
from .search_space import Mask, SearchSpace, TrialConfig
from .trainer import TrainConfig, evaluate, fine_tune, pretrain

__version__ = "0.1.0"

__all__ = [
    "REFERENCE_SYNTH", "SOURCE_SYNTH", "Dataset", "SplitRatios", "SynthConfig", "generate_synthetic", "load_csv",
    "split", "FairmaskError", "ObjectiveKind", "SubgroupReport", "auroc", "dp_diff", "eodds_diff", "fair_objective",
    "subgroup_report", "Architecture", "ModelParams", "backward", "forward", "init_random", "load_checkpoint",
    "save_checkpoint", "RunConfig", "RunResult", "mask_frequency", "run_baselines", "run_search", "Mask",
    "SearchSpace", "TrialConfig", "TrainConfig", "evaluate", "fine_tune", "pretrain",
]
