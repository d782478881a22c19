import os
import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

NNET_DIR = os.environ.get("QUANTREACH_NNET_DIR")


@pytest.fixture(scope="session")
def nnet_dir():
    if not NNET_DIR or not Path(NNET_DIR).is_dir():
        pytest.skip("SKIP: network assets absent (set QUANTREACH_NNET_DIR)")
    return NNET_DIR


@pytest.fixture(scope="session")
def real_nets(nnet_dir):
    from quantreach.nnet import load_network_set

    return load_network_set(nnet_dir)
