import tracemalloc

import numpy as np
import pytest

from operatrack.features import FrameSequence
from operatrack.oltw import TrackerState
from operatrack.synth import smooth_trajectory


@pytest.mark.slow
def test_three_hour_stream_keeps_window_sized_state():
    rng = np.random.default_rng(0)
    n_ref, dim, c = 30000, 20, 4000
    ref = FrameSequence(smooth_trajectory(n_ref, dim, 20.0, rng), 0.01)
    st = TrackerState(ref, 0, c)
    n_steps = 3 * 3600 * 100
    chunk = 10000
    tracemalloc.start()
    baseline = None
    for k in range(0, n_steps, chunk):
        # slow walk over the reference, then parked at its end
        idx = np.minimum(np.arange(k, k + chunk) // 20, n_ref - 1)
        frames = ref.frames[idx] + 0.1 * rng.standard_normal((chunk, dim))
        for f in frames:
            st.step(f)
        assert st.D.size <= c
        if baseline is None:
            baseline = tracemalloc.get_traced_memory()[0]
    current, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert current - baseline < 1_000_000
    assert peak - baseline < 8_000_000
    assert st.sp >= n_ref - 2
