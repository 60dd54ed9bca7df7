"""Walk one synthetic road frame through the lane pipeline, stage by stage.

Run:  python demos/lane_walkthrough.py [out_dir]
"""

import math
import sys
from pathlib import Path

from driveperc import imaging, lanes, synth
from driveperc.lanes import PipelineConfig
from driveperc.tensor_core import Prng


def main(out_dir="lane_demo"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frame, truth = synth.road_frame(Prng(7), color="yellow")
    imaging.write_image(frame, out / "frame.ppm")

    # every intermediate lands next to the frame as frame.<stage>.pgm / .ppm
    result = lanes.run_pipeline(frame, PipelineConfig(), dump_dir=out, stem="frame")
    for name in lanes.STAGES:
        img = result.stages[name]
        print(f"stage {name:8s} {img.width}x{img.height}")

    for side, seg, ref in zip(("left", "right"), (result.lanes.left, result.lanes.right), truth):
        if seg is None:
            print(f"{side}: absent")
            continue
        err = max(math.hypot(seg.x1 - ref.x1, seg.y1 - ref.y1), math.hypot(seg.x2 - ref.x2, seg.y2 - ref.y2))
        print(f"{side}: ({seg.x1:.1f}, {seg.y1:.1f}) -> ({seg.x2:.1f}, {seg.y2:.1f}), endpoint error {err:.2f} px")


if __name__ == "__main__":
    main(*sys.argv[1:])
