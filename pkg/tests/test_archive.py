import json

import pytest

from sentistream.archive import Archive
from sentistream.types import RecordEnvelope


def _env(i, t=None, text=None, label=None):
    return RecordEnvelope(
        doc_id=f"d{i}",
        event_time=t if t is not None else i,
        text=text if text is not None else f"record {i}",
        label=label,
    )


class TestAppend:
    def test_single_append_visible(self, tmp_path):
        arc = Archive(tmp_path)
        arc.append(_env(0, t=7))
        assert arc.record_count() == 1
        [out] = list(arc.scan())
        assert out.doc_id == "d0" and out.event_time == 7

    def test_manifest_tracks_time_bounds(self, tmp_path):
        arc = Archive(tmp_path)
        for t in (10, 20, 5):
            arc.append(_env(t, t=t))
        arc.flush()
        seg = arc.segments[-1]
        assert (seg.min_time, seg.max_time, seg.record_count) == (5, 20, 3)
        body = json.loads(seg.manifest_path.read_text())
        assert body == {"min_time": 5, "max_time": 20, "record_count": 3, "sealed": False}

    def test_append_order_preserved(self, tmp_path):
        arc = Archive(tmp_path)
        for i in range(100):
            arc.append(_env(i, t=1000 - i))  # event times descending
        assert [e.doc_id for e in arc.scan()] == [f"d{i}" for i in range(100)]


class TestRestart:
    def test_round_trip_byte_identical(self, tmp_path):
        arc = Archive(tmp_path)
        envs = [
            RecordEnvelope(
                doc_id=f"d{i}",
                event_time=i * 13,
                text=f"text {i} with unicode éè and tab\tchars",
                author=f"user{i % 7}" if i % 3 else None,
                label="positive" if i % 2 else None,
            )
            for i in range(10_000)
        ]
        for env in envs:
            arc.append(env)
        arc.close()

        seg_bytes = {p.name: p.read_bytes() for p in (tmp_path / "archive").glob("*.jsonl")}
        arc2 = Archive(tmp_path)
        assert arc2.record_count() == 10_000
        assert list(arc2.scan()) == envs
        # reopening mutates nothing on disk
        after = {p.name: p.read_bytes() for p in (tmp_path / "archive").glob("*.jsonl")}
        assert after == seg_bytes

    def test_unmanifested_segment_rebuilt(self, tmp_path):
        arc = Archive(tmp_path)
        for i in range(5):
            arc.append(_env(i, t=i + 100))
        arc.close()
        seg = arc.segments[-1]
        seg.manifest_path.unlink()  # simulate crash before manifest write

        arc2 = Archive(tmp_path)
        assert arc2.record_count() == 5
        rebuilt = arc2.segments[-1]
        assert (rebuilt.min_time, rebuilt.max_time) == (100, 104)
        assert rebuilt.manifest_path.exists()

    def test_append_resumes_after_restart(self, tmp_path):
        arc = Archive(tmp_path)
        arc.append(_env(0))
        arc.close()
        arc2 = Archive(tmp_path)
        arc2.append(_env(1))
        assert arc2.record_count() == 2
        assert [e.doc_id for e in arc2.scan()] == ["d0", "d1"]


class TestScan:
    def _three_segments(self, tmp_path):
        """Three segments with disjoint time ranges 0-90, 200-290, 400-490.

        The roll check looks at the span before writing the incoming record,
        so a limit of 90 seals each group exactly when the next group starts.
        """
        arc = Archive(tmp_path, segment_span_ms=90)
        for base in (0, 200, 400):
            for t in range(base, base + 100, 10):
                arc.append(_env(t, t=t))
        arc.flush()
        assert len(arc.segments) == 3
        return arc

    def test_pruning_opens_only_intersecting_segments(self, tmp_path):
        arc = self._three_segments(tmp_path)
        arc.files_opened = 0
        out = list(arc.scan(start=200, end=299))
        assert [e.event_time for e in out] == list(range(200, 300, 10))
        assert arc.files_opened == 1

    def test_full_scan_opens_everything(self, tmp_path):
        arc = self._three_segments(tmp_path)
        arc.files_opened = 0
        assert len(list(arc.scan())) == 30
        assert arc.files_opened == 3

    def test_empty_range(self, tmp_path):
        arc = self._three_segments(tmp_path)
        arc.files_opened = 0
        assert list(arc.scan(start=100, end=199)) == []
        assert arc.files_opened == 0

    def test_inclusive_bounds(self, tmp_path):
        arc = Archive(tmp_path)
        for t in (10, 20, 30):
            arc.append(_env(t, t=t))
        assert [e.event_time for e in arc.scan(start=10, end=30)] == [10, 20, 30]
        assert [e.event_time for e in arc.scan(start=11, end=29)] == [20]

    def test_reversed_range_rejected(self, tmp_path):
        arc = Archive(tmp_path)
        arc.append(_env(0))
        with pytest.raises(ValueError):
            list(arc.scan(start=10, end=5))

    def test_contains_filter_case_insensitive(self, tmp_path):
        arc = Archive(tmp_path)
        arc.append(_env(0, text="Happy DAY"))
        arc.append(_env(1, text="sad night"))
        assert [e.doc_id for e in arc.scan(contains="happy")] == ["d0"]
        assert [e.doc_id for e in arc.scan(contains="NIGHT")] == ["d1"]

    def test_predicate_filter(self, tmp_path):
        arc = Archive(tmp_path)
        arc.append(_env(0, label="positive"))
        arc.append(_env(1, label="negative"))
        out = list(arc.scan(predicate=lambda e: e.label == "negative"))
        assert [e.doc_id for e in out] == ["d1"]

    def test_corrupt_line_skipped_and_counted(self, tmp_path):
        arc = Archive(tmp_path)
        for i in range(3):
            arc.append(_env(i))
        arc.close()
        seg_path = arc.segments[-1].path
        lines = seg_path.read_text().splitlines()
        lines.insert(1, "{this is not json")
        lines.insert(3, '{"no_required_fields": true}')
        seg_path.write_text("\n".join(lines) + "\n")

        arc2 = Archive(tmp_path)
        out = list(arc2.scan())
        assert [e.doc_id for e in out] == ["d0", "d1", "d2"]
        assert arc2.corrupt_skipped == 2


class TestRolling:
    def test_roll_by_bytes(self, tmp_path):
        arc = Archive(tmp_path, segment_bytes=200)
        for i in range(20):
            arc.append(_env(i, t=5))  # constant time: only size can roll
        assert len(arc.segments) > 1
        assert all(s.sealed for s in arc.segments[:-1])
        assert sum(s.record_count for s in arc.segments) == 20
        assert len([e for e in arc.scan()]) == 20

    def test_roll_by_time_span(self, tmp_path):
        arc = Archive(tmp_path, segment_span_ms=1000)
        arc.append(_env(0, t=0))
        arc.append(_env(1, t=500))
        assert len(arc.segments) == 1
        arc.append(_env(2, t=1500))  # span now 1500 >= 1000: next append rolls
        arc.append(_env(3, t=1600))
        assert len(arc.segments) == 2
        assert arc.segments[0].sealed
        assert arc.record_count() == 4
