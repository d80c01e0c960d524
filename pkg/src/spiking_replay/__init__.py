"""Continual learning for recurrent spiking networks with compressed latent replays."""

from .config import ExperimentConfig, RunManifest, canonical_hash, load_config
from .continual import (
    CLReport,
    CLScenario,
    forgetting,
    pretrain,
    reinit_new_class,
    run_increment,
    run_protocol,
)
from .estimator import SpikingClassifier, check_spike_array
from .neurons import (
    LayerState,
    Network,
    NumericError,
    RecurrentLayer,
    build_network,
    layer_forward,
    layer_step,
    load_network,
    network_forward,
    save_network,
    split_network,
)
from .replay import (
    CodecSpec,
    ReplayBuffer,
    buffer_extend,
    capture_latents,
    compress_aggregate,
    compress_chunk_threshold,
    compress_hybrid,
    decompress_chunk_threshold,
    expand_aggregate,
    expand_hybrid,
    load_buffer,
    memory_footprint,
    mix_for_training,
    save_buffer,
    select_replay_samples,
)
from .seeding import substream
from .spikes import (
    SpikeSet,
    SpikeSetFormatError,
    SpikeTensor,
    load_spikeset,
    pack,
    payload_nbytes,
    save_spikeset,
)
from .synth import SynthSpec, make_synthetic_spikeset
from .training import (
    AdamOptimizer,
    ForwardTrace,
    MetricsRecord,
    SgdOptimizer,
    TrainConfig,
    bptt_backward,
    evaluate,
    forward_batch,
    forward_trace,
    loss_spike_count_ce,
    soft_spike,
    spike_count_cross_entropy,
    surrogate_grad,
    train_epochs,
)

__version__ = "0.1.0"
