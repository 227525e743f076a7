import pytest

from eeg2speech.config import config_from_dict
from eeg2speech.data import generate_synthetic, load_manifest


def make_tiny_config(**train_overrides):
    """Desk-scale run config sized so full training steps run in milliseconds."""
    return config_from_dict({
        "eeg": {
            "n_channels_in": 4, "hidden_dim": 16, "n_conv_blocks": 3,
            "conv_strides": [1, 3, 1], "n_s4_layers": 1, "s4_state_dim": 16,
            "dropout": 0.0, "embed_dim": 12,
        },
        "speech": {
            "latent_dim": 16, "wn_hidden": 24, "wn_layers": 2,
            "upsample_initial": 32, "disc_channels": 4, "segment_size": 2048,
        },
        "connector": {
            "embed_dim": 12, "latent_dim": 16, "prenet_layers": 1,
            "prenet_heads": 2, "prenet_ff_dim": 24, "n_coupling_layers": 2,
            "coupling_hidden": 8, "coupling_conv_layers": 1, "dropout": 0.0,
        },
        "train": {"batch_size": 2, "log_every": 5, "checkpoint_every": 0,
                  **train_overrides},
        "data": {
            "n_subjects": 2, "n_stimuli": 4, "eeg_channels": 4, "eeg_raw_fs": 512,
            "min_duration": 1.0, "max_duration": 1.3,
            "held_out_subjects": 1, "held_out_stimuli": 1, "synth_seed": 11,
        },
    })


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Synthetic paired corpus shared by trainer/CLI/acceptance tests."""
    cfg = make_tiny_config()
    out = tmp_path_factory.mktemp("corpus")
    manifest_path = generate_synthetic(cfg.data, out)
    return load_manifest(manifest_path)
