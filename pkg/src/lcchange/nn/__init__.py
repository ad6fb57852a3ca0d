from lcchange.nn.gradcheck import grad_check
from lcchange.nn.model import (
    ConvNet,
    ConvNetSpec,
    adam_step,
    decode_checkpoint,
    encode_checkpoint,
    forward,
    init_net,
    load_checkpoint,
    loss_and_grad,
    param_count,
    predict_proba,
    save_checkpoint,
    sgd_step,
)

__all__ = [
    "ConvNet", "ConvNetSpec", "adam_step", "decode_checkpoint", "encode_checkpoint", "forward", "grad_check",
    "init_net", "load_checkpoint", "loss_and_grad", "param_count", "predict_proba",
    "save_checkpoint", "sgd_step",
]
