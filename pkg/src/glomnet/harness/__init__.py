"""Cross-validation, training, evaluation, synthetic data and the CLI."""
from .evaluate import EvalReport, PatientRow, baseline_propagation, evaluate, export_report
from .folds import FoldSplit, assign_folds
from .synth import SynthConfig, synth_generate
from .train import Model, predict_patient, run_cv, train_fold
