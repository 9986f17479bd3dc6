"""A small deterministic numpy engine: the layer set, losses and optimizer
needed by the mask autoencoder, with exact backpropagation."""
from .functional import (
    batchnorm_forward,
    conv2d_forward,
    conv_transpose2d_forward,
    dropout_forward,
    leaky_relu_forward,
    softmax_channel_forward,
)
from .gradcheck import GradCheckReport, check_function_gradient, gradient_check
from .layers import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    Dropout,
    LayerSpec,
    LeakyReLU,
    Sequential,
    SoftmaxChannel,
    he_normal_init,
    make_layer,
)
from .losses import generalized_dice_loss, mse_loss
from .optim import AdamState, adam_step

__all__ = [
    "AdamState", "BatchNorm2d", "Conv2d", "ConvTranspose2d", "Dropout", "GradCheckReport",
    "LayerSpec", "LeakyReLU", "Sequential", "SoftmaxChannel", "adam_step",
    "batchnorm_forward", "check_function_gradient", "conv2d_forward",
    "conv_transpose2d_forward", "dropout_forward", "generalized_dice_loss",
    "gradient_check", "he_normal_init", "leaky_relu_forward", "make_layer", "mse_loss",
    "softmax_channel_forward",
]
