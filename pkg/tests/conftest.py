import pytest

from lidarnav.sim.dataset import gen_dataset, load_dataset


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """24 lane-stable frames from two training tracks."""
    path = tmp_path_factory.mktemp("data") / "ds"
    gen_dataset(["train_a", "train_b_cw"], 24, 3, path)
    return path, load_dataset(path)
