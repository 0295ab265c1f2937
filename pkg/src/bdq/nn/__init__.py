from .checkpoint import CheckpointError, load_params, save_params
from .layers import (AttackNet, Layer, Network, NetworkSpec, action_net_spec,
                     conv_stack, privacy_net_spec)
from .optim import SGD, Adam, cosine_lr
from .tensor import (Tensor, concat, conv, entropy, filter2d, global_avg_pool,
                     log_softmax, max_pool, mse, no_grad, relu, sigmoid, softmax,
                     softmax_cross_entropy, softplus, upsample)
