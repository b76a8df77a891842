"""Smoke test for the cadenet Python extension.

Build and install first, e.g. `pip install ./crates/py` (needs maturin), or
copy target/release/libcadenet.so next to this script as cadenet.so.
"""

import tempfile
from pathlib import Path

import cadenet


def main() -> None:
    assert abs(cadenet.iou((0, 0, 10, 10), (5, 0, 15, 10)) - 1 / 3) < 1e-12
    kept = cadenet.nms([((0, 0, 10, 10), 0, 0.9), ((1, 0, 11, 10), 0, 0.8), ((50, 50, 60, 60), 0, 0.7)])
    assert kept == [0, 2], kept
    assert cadenet.hungarian([[4, 1], [2, 8]]) == [(0, 1), (1, 0)]

    tracker = cadenet.Tracker()
    for step in range(3):
        tracks = tracker.update([((10 + step, 10, 30 + step, 40), 0, 0.8)])
    assert len(tracks) == 1 and tracks[0][0] == 1, tracks

    with tempfile.TemporaryDirectory() as tmp:
        corpus = Path(tmp) / "corpus"
        assert cadenet.synth_corpus(str(corpus), count=6, conditions=["fog"], seed=3) == 6
        image = cadenet.Image.open(str(corpus / "fog_0000.png"))
        assert (image.width, image.height, image.channels) == (160, 120, 3)

        est = cadenet.estimate_weather(image)
        assert est["condition"] in {"rain", "fog", "sand", "snow", "clear"}

        out, report = cadenet.enhance(image, condition="fog", severity=0.5)
        assert abs(report["alpha"] - 0.7) < 1e-12
        assert len(out.tobytes()) == 160 * 120 * 3

        cols, rows, grid = cadenet.reliability_grid(image)
        assert len(grid) == cols * rows and all(0.0 <= v <= 1.0 for v in grid)

        summary, jsonl = cadenet.benchmark(str(corpus))
        assert "fog" in summary
        assert len(jsonl.splitlines()) == 12

    log = cadenet.simulate(frames=30, dim=64)
    assert log == cadenet.simulate(frames=30, dim=64)
    print("python smoke test OK")


if __name__ == "__main__":
    main()
