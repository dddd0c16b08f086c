"""SAR colorization toolkit.

Synthesizes reference colorized SAR images by IHS component substitution,
fits spectral and convolutional colorizers (band replication, linear and MLP
regression, a plain CNN, and a U-Net conditional GAN), scores them with
remote-sensing quality metrics, and reproduces the evaluation tables at desk
scale through a seeded benchmark harness.
"""

from .dataio import (Manifest, PairedSample, RasterPatch, adjust_sar,
                     iterate_samples, load_manifest, read_patch, select_rgb,
                     write_patch)
from .metrics import MetricReport, evaluate_method, nrmse, q4, r2, sam
from .protocol import FusionProduct, histogram_match, intensity, synthesize_gt
from .regress import LinearModel, MlpModel, apply_lr, apply_nl, fit_lr, fit_nl, nocol, tansig
from .models import (CnnSpec, GanSpec, ModelCheckpoint, TrainConfig, colorize,
                     train_cgan, train_cnn)
from .bench import BenchRun, generate_desk_dataset, run_benchmark, sweep

__version__ = "0.1.0"
