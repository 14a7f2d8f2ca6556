"""Convolution-free conditional transformer GAN for class-conditional image
synthesis and selective synthetic augmentation."""

from .config import (DiscriminatorConfig, GanConfig, GeneratorConfig, LossConfig, RunConfig,
                     SelectionConfig, TrainConfig)
from .discriminator import Discriminator
from .errors import ConfigError, InputError, LoadError, NumericalError
from .generator import Generator
from .losses import LossWeights

__version__ = "0.1.0"
