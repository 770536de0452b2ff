from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .experiments import ABLATION_ROWS, DEFAULT_GRIDS, run_ablation, run_sensitivity, toggles_for
from .training import EvalReport, TrainResult, constant_baseline, evaluate, evaluate_predictor, train
