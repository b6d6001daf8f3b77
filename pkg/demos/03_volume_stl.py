# Volume of a section stack at two visits and a watertight STL surface.
from pathlib import Path

from octabio import phantom
from octabio.segmentation import run_pipeline
from octabio.volume3d import (
    export_stl,
    format_measurements,
    is_watertight,
    measurement_row,
    mesh_volume,
    stack_from_masks,
    voxel_surface,
)

out = Path(__file__).parent / "demo_out"
out.mkdir(exist_ok=True)

rows = []
# visit 2 has two more sections but a lesion shrunk by 15%
for visit, (n, radius, seed) in enumerate([(20, 38.0, 1), (22, 32.0, 2)], 1):
    images, _ = phantom.section_stack_phantom(n, radius, seed=seed, size=128)
    masks = [run_pipeline(img) for img in images]
    stack = stack_from_masks(masks, slice_distance_um=25.0)
    rows.append(measurement_row(f"visit {visit}", stack))

    mesh = voxel_surface(stack)
    path = out / f"visit{visit}.stl"
    export_stl(mesh, path)
    print(f"visit {visit}: {len(mesh)} triangles, watertight={is_watertight(mesh)}, "
          f"mesh volume {mesh_volume(mesh):.1f} um^3, {path.stat().st_size} bytes -> {path.name}")

print()
print(format_measurements(rows))
change = rows[1]["volume_um3"] / rows[0]["volume_um3"] - 1
print(f"\nvolume change: {100 * change:+.1f}%")
