"""Frequency-domain independent vector analysis with learned source densities."""
from .density import LaplaceModel, NeuralModel, NNWeights, init_weights, load_weights, save_weights
from .exceptions import FormatError, NumericError, ParameterError
from .metrics import coherence, hf_emphasis, output_contributions, sir
from .mixsim import butterworth_system, mix, sample_random_system
from .separator import (
    SeparationState,
    StepControl,
    batch_separate,
    online_separate,
    resolve_scaling,
    spectral_norm_rank1,
)
from .stft import Spectrogram, WindowPair, design_windows

__version__ = "0.1.0"
