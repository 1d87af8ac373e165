"""Variational Bayes detection and joint channel estimation for few-bit massive MIMO."""

from .channel import (ChannelModel, FrameRealization, build_pilots, iid_model,
                      laplacian_covariance, laplacian_model, sample_channel, sample_frame)
from .config import ExperimentConfig, load_config, parse_config, preset
from .detect import (Algorithm, CsirState, DetectionResult, DetectorOptions, conv_qvb_detect,
                     detect, elbo, lmmse_qvb_detect, mf_qvb_detect)
from .errors import *  # noqa: F401,F403
from .jed import (ChannelPrior, JedAlgorithm, JedOptions, JedResult, JedState,
                  channel_posterior_mf, conv_qvb_jed, lmmse_qvb_jed, mf_qvb_jed, run_jed)
from .kernels import (CdfMode, ComplexInterval, Constellation, DiscretePosterior, MomentPair,
                      discrete_posterior, expected_quadratic_form, hard_decision, psk, qam, qpsk,
                      truncated_complex_moments, truncated_moments)
from .quantizer import (QuantizedBlock, QuantizerSpec, build_quantizer, calibrate_step_size,
                        quantize)
from .sim import (GridPoint, MetricsTable, TrialRecord, map_oracle_detect, run_sweep, run_trial,
                  snr_to_noise_var)

__version__ = "0.1.0"
