"""Joint color-depth super-resolution with a conditional GAN.

A self-contained float64 numpy implementation: five-subnetwork
generator, convolutional discriminator, hand-derived backpropagation,
alternating adversarial training, and PSNR/SSIM/sharpness evaluation.
"""

from .losses import (LossBreakdown, adversarial_losses, data_loss, gd_loss,
                     generator_adversarial_loss, total_generator_objective,
                     tv_loss)
from .metrics import evaluate, psnr, sharpness, ssim
from .network import (ConvLayer, Discriminator, Generator, GeneratorOutput,
                      build_discriminator, build_generator, count_parameters,
                      discriminator_forward, generator_forward,
                      load_checkpoint, parameters, save_checkpoint)
from .optimizer import AdamState, adam_init, adam_step
from .tensor import (ShapeError, activation_backward, activation_forward,
                     bicubic_resize, conv2d_backward, conv2d_forward,
                     finite_diff_check)
from .trainer import TrainConfig, TrainLogRecord, train, train_step

__version__ = "0.1.0"
