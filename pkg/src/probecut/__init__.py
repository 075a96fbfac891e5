"""probecut: layer probes for pruning cut-off selection and effectiveness estimation.

The pipeline: compute code features for C/C++ samples (`metrics`), train one
small classifier per transformer layer on exported activations (`probe`),
turn the per-layer accuracy curves into a pruning cut-off (`pruning`), and
project post-fine-tuning effectiveness from probe accuracy plus a
dataset-transferable offset (`estimator`).
"""

__version__ = "0.1.0"

from probecut.samples import CodeSample, SplitPlan, load_manifest, write_manifest, filter_samples
from probecut.lexer import Token, tokenize_c
from probecut.metrics import (
    FunctionMetrics,
    BinningScheme,
    cyclomatic_complexity,
    halstead_metrics,
    derive_bins,
    assign_class,
    DISCARDED,
)
from probecut.tensors import (
    ActivationTensor,
    ActivationSetManifest,
    read_tensor,
    write_tensor,
    load_tensor_set,
    pool_tokens,
)
from probecut.probe import ProbeConfig, ProbeModel, train_probe, loss_and_grad, evaluate_per_group, probe_all_layers
from probecut.pruning import (
    LossCurve,
    CutoffDecision,
    loss_curve,
    select_kcut,
    baseline_cutpoints,
    prune_plan,
    save_prune_plan,
    load_prune_plan,
)
from probecut.estimator import (
    EffectivenessRecord,
    ProbeSummary,
    BetaTable,
    EstimationReport,
    compute_beta,
    estimate,
    estimation_error,
    leave_one_out,
)
