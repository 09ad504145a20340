import pytest

from modpaint.tensor import current_dtype, set_precision


@pytest.fixture(autouse=True)
def _restore_precision():
    # the precision mode is process-global; keep tests isolated from
    # anything that switches it (the train CLI does)
    import numpy as np

    before = "float32" if current_dtype() == np.float32 else "float64"
    yield
    set_precision(before)
