import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    from adlm_bridge.toy import build_toy

    out = tmp_path_factory.mktemp("toy-model") / "checkpoint"
    return build_toy(str(out), vocab_size=120, seed=1)
