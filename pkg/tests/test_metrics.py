from __future__ import annotations

import io

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmcluster.metrics import COLUMNS, CSV_HEADER, IterationMetrics, read_metrics_csv, write_metrics_csv

counts = st.integers(0, 10**12)


@given(st.lists(st.builds(IterationMetrics, iter=st.integers(1, 1000), wall_ms=st.floats(0, 1e6),
                          objective=st.floats(0, 1e12), dist_comps=counts, bytes_read=counts,
                          aux_bytes=counts), max_size=5))
def test_csv_roundtrip(records):
    buf = io.StringIO()
    write_metrics_csv(buf, records)
    text = buf.getvalue()
    assert text.splitlines()[0] == CSV_HEADER
    assert read_metrics_csv(io.StringIO(text)) == records


def test_schema_and_sanity():
    assert COLUMNS[0] == "iter" and COLUMNS[-1] == "aux_bytes"
    rec = IterationMetrics(1, cache_hits=9, cache_misses=1)
    assert rec.hit_rate == 0.9
    rec.check()
    with pytest.raises(AssertionError):
        IterationMetrics(1, dist_comps=-1).check()
