import os
import shutil

import pytest


@pytest.fixture
def kit_binary():
    return os.environ.get("SELD_KIT_BINARY") or shutil.which("seld_kit")
