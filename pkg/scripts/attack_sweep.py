"""Stealthy frustum displacement versus depth, per class and IoU floor.

Prints a table (or CSV with --csv) of the solver's displacement for an
on-axis target at each depth, next to the grid oracle.
"""

import argparse
import csv
import sys

from sgfusion.attack import AttackConstraints, Infeasible, frustum_attack_oracle, optimal_frustum_attack
from sgfusion.geometry import Box3D, Pose, project_box
from sgfusion.scene import CLASS_DIMS, Detection, ObjectClass, SceneConfig


def sweep(classes, depths, zetas, v_max, height, oracle):
    cam = SceneConfig(camera_height=height).camera(Pose())
    for cls in classes:
        dims = CLASS_DIMS[ObjectClass(cls)]
        for z in zetas:
            c = AttackConstraints(zeta_min=z, v_max=v_max)
            for x in depths:
                box = Box3D((x, 0.0, dims[0] / 2), dims)
                d3 = Detection("L0", cls, "lidar", box)
                d2 = Detection("C0", cls, "camera", project_box(box, cam))
                try:
                    res = optimal_frustum_attack(d3, d2, cam, c)
                    ref = frustum_attack_oracle(d3, d2, cam, c).displacement if oracle else None
                    yield cls, z, x, res.displacement, res.achieved_iou, ref
                except Infeasible:
                    yield cls, z, x, None, None, None


def _fmt(v):
    return "-" if v is None else f"{v:.2f}"


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--classes", nargs="+", default=["car", "van", "truck"])
    p.add_argument("--depths", nargs="+", type=float, default=[10, 20, 30, 40, 50])
    p.add_argument("--zeta", nargs="+", type=float, default=[0.8, 0.9])
    p.add_argument("--v-max", type=float, default=150.0)
    p.add_argument("--camera-height", type=float, default=0.0)
    p.add_argument("--oracle", action="store_true", help="also run the grid oracle (slow)")
    p.add_argument("--csv", action="store_true")
    args = p.parse_args(argv)
    rows = sweep(args.classes, args.depths, args.zeta, args.v_max, args.camera_height, args.oracle)
    header = ("class", "zeta_min", "depth_m", "displacement_m", "iou", "oracle_m")
    if args.csv:
        w = csv.writer(sys.stdout)
        w.writerow(header)
        w.writerows(rows)
        return
    print("{:<10} {:>8} {:>8} {:>15} {:>7} {:>9}".format(*header))
    for cls, z, x, d, iou, ref in rows:
        print(f"{cls:<10} {z:>8.2f} {x:>8.1f} {_fmt(d):>15} {_fmt(iou):>7} {_fmt(ref):>9}")


if __name__ == "__main__":
    main()
