"""Generalized convolution on irregular 2-D point domains.

A convolution for signals that live on arbitrary points of the plane rather
than on a pixel grid: a moving rectangular window builds a receptive graph
over the points, a shared weight kernel is allocated to the edges by the
cell each source falls into, and forward/backward propagation run directly
on the edge structure. On a regular lattice the operator degenerates to the
ordinary zero-padded convolution; off the lattice it keeps working.
"""

from .conv import (
    ConvGradients,
    Kernel,
    bilinear_graph_conv,
    conv_backward,
    conv_forward,
    init_kernel,
    load_kernel,
    materialize_dense,
    save_kernel,
)
from .domain import (
    Batch,
    Entry,
    Point,
    batch_from_rows,
    homogenize,
    make_entry,
    read_entry,
    regular_grid_entry,
    regular_grid_points,
    write_entry,
)
from .network import (
    Network,
    NetworkConfig,
    NetworkTemplate,
    PoolPlan,
    count_params,
    maxpool_backward,
    maxpool_forward,
    parse_network_config,
    plan_pool,
)
from .optim import SgdConfig, TrainData, sgd_step, train
from .receptive import ReceptiveGraph, RectWindow, build_rect_graph

__version__ = "0.1.0"
