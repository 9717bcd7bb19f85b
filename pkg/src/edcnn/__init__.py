"""Expansive deep convolutional neural networks trained by truncated ERM."""

__version__ = "0.1.0"

from edcnn.capacity import (
    CapacityReport,
    capacity_report,
    check_schedule,
    consistency_ratio,
    covering_log2_bound,
    packing_bound,
    pseudo_dim_bound,
)
from edcnn.conv import (
    contracting_convolve,
    expansive_convolve,
    toeplitz_matrix_contracting,
    toeplitz_matrix_expansive,
)
from edcnn.datagen import (
    LabeledDataset,
    SplitSpec,
    gen_sinc_test,
    gen_sinc_train,
    gen_two_class_signals,
    load_csv,
    split,
    window_series,
    write_csv,
)
from edcnn.grad import GradientSet, backprop, finite_diff_gradient
from edcnn.network import (
    EDCNNParams,
    count_neurons,
    count_params,
    forward,
    forward_traced,
    init_params,
    load_params,
    save_params,
    truncate,
)
from edcnn.trainer import (
    TrainConfig,
    TrainingDiverged,
    TrainReport,
    depth_schedule,
    evaluate_misclassification,
    evaluate_rmse,
    predict_truncated,
    train_erm,
    truncation_schedule,
)
