"""fedsim: a deterministic federated-learning simulator for studying
model-replacement backdoor attacks and the defenses fielded against them.

The package is organized bottom-up:

- params: flat weight vectors and the FLSIM1 checkpoint format
- nn: softmax classifiers, hand-written gradients, benign local training
- data: blob tasks, Dirichlet partitions, semantic and pixel backdoors
- aggregation: fedavg, krum variants, coordinate median, clipped+noised
- detect: norm / clustering / cosine / accuracy detectors, evasion loss
- attack: naive poisoning, train-and-scale, constrain-and-scale, splitting
- rounds, harness: round loop, experiment configs, sweeps, metrics
"""

__version__ = "0.1.0"

from .aggregation import (
    AggregatorConfig,
    Submission,
    coord_median,
    dp_aggregate,
    fedavg,
    krum,
    krum_scores,
    multi_krum,
    select_participants,
)
from .attack import (
    AttackConfig,
    Attacker,
    AttackerState,
    constrain_and_scale,
    estimate_norm_bound,
    naive_poison,
    replacement_update,
    split_update,
    train_and_scale,
    train_backdoored,
    update_gamma,
)
from .data import (
    BackdoorSpec,
    Dataset,
    Partition,
    SyntheticTaskSpec,
    apply_pixel_pattern,
    dirichlet_partition,
    gen_blobs,
    jitter,
    load_csv,
    make_pixel_backdoor,
    make_semantic_backdoor,
    replace_in_batch,
    save_csv,
)
from .detect import (
    DetectorVerdict,
    accuracy_audit,
    cosine_anomaly_grad,
    cosine_anomaly_loss,
    cosine_detector,
    distance_anomaly_grad,
    distance_anomaly_loss,
    kmeans_norm_detector,
    norm_detector,
    pairwise_cosine_stats,
)
from .errors import ConfigError
from .harness import (
    ExperimentConfig,
    ModelConfig,
    ScheduleConfig,
    default_config,
    load_config,
    run_experiment,
    save_config,
    sweep,
)
from .nn import (
    Model,
    accuracy,
    forward,
    grad,
    linear_softmax,
    loss_ce,
    mean_loss,
    mlp1,
    sgd_step,
    train_local,
    with_params,
)
from .params import FormatError, ParameterVector, load_params, save_params
from .rounds import (
    DetectorConfig,
    EvalSuite,
    MetricsRecord,
    RoundConfig,
    RoundState,
    backdoor_accuracy,
    run_round,
    substream,
)
