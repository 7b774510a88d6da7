import pytest

from seizban import neuralnet, pipeline, signal_io

# Short desk-scale scenario shared across integration tests: 240 s recording,
# one onset at 160 s, 100 s prediction horizon.
SHORT = dict(duration_s=240.0, seizure_onsets_s=(160.0,), preictal_horizon_s=100.0)


def short_synthetic(seed, **overrides):
    params = dict(SHORT)
    params.update(overrides)
    return signal_io.SyntheticConfig(seed=seed, **params)


@pytest.fixture(scope="session")
def trained_models():
    recs = [
        signal_io.generate_synthetic(short_synthetic(1000 + j)) for j in range(2)
    ]
    eeg = pipeline.train_node_model(recs, "eeg", seed=5, horizon_s=100.0)
    ecg = pipeline.train_node_model(recs, "ecg", seed=5, horizon_s=100.0)
    return eeg, ecg


@pytest.fixture(scope="session")
def model_files(tmp_path_factory, trained_models):
    d = tmp_path_factory.mktemp("models")
    eeg_path = str(d / "eeg.szm")
    ecg_path = str(d / "ecg.szm")
    neuralnet.save_model(trained_models[0], eeg_path)
    neuralnet.save_model(trained_models[1], ecg_path)
    return eeg_path, ecg_path
