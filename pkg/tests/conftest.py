import pytest

from pws.data import load_dataset
from pws.fixtures import synth
from pws.gateway import Gateway, MockBackend
from pws.prompts import load_suite


@pytest.fixture(scope="session")
def synth_paths(tmp_path_factory):
    """Small synthetic spam fixture shared by pipeline/service tests."""
    out = tmp_path_factory.mktemp("synth")
    return synth.write_fixture(out, n_train=400, n_valid=80, n_test=120)


@pytest.fixture(scope="session")
def synth_dataset(synth_paths):
    return load_dataset(synth_paths["dataset"])


@pytest.fixture()
def synth_suite(synth_paths, synth_dataset):
    return load_suite(synth_paths["prompted_suite"], synth_dataset.class_space)


@pytest.fixture()
def mock_gateway(synth_paths):
    gateway = Gateway()
    gateway.register("default", MockBackend.from_file(synth_paths["rulebook"]))
    return gateway
