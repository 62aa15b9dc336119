"""Smoke test for the lodsplat Python module.

Build and install first:  pip install --no-build-isolation ./crates/python
"""

import math
import tempfile

import lodsplat


def main():
    assert lodsplat.uniform_gaussian_count(6890, 13776, 2) == 296186
    assert lodsplat.gaussian_count(9, [1] * 10 + [3] * 2) == 229

    mesh = lodsplat.Mesh.icosphere(2, 0.5).with_wave_texture(32, 2.0)
    avatar = lodsplat.Avatar(mesh)
    assert len(avatar) == mesh.vertex_count + mesh.face_count
    assert len(avatar) == avatar.expected_count()

    cams = lodsplat.camera_rig(2.0, 6, 32, 32)
    data = lodsplat.Dataset.render_targets(mesh, cams)
    losses = avatar.train(data, 0, iterations=40, seed=1)
    assert len(losses) == 40 and all(math.isfinite(x) for x in losses)

    avatar.subdivide()
    assert avatar.level == 1
    assert len(avatar) == lodsplat.uniform_gaussian_count(mesh.vertex_count, mesh.face_count, 1)

    img = avatar.render(cams[0])
    target = lodsplat.render_mesh(mesh, cams[0])
    print(f"PSNR {lodsplat.psnr(img, target):.2f} dB, SSIM {lodsplat.ssim(img, target):.4f}")
    assert lodsplat.ssim(target, target) == 1.0

    quad = lodsplat.Mesh.quad(1.0)
    cam = lodsplat.Camera.look_at((0.0, 0.0, 2.0), width=16, height=16)
    assert lodsplat.select_faces(quad, quad, [True] * 256, cam) == {0, 1}

    with tempfile.TemporaryDirectory() as d:
        avatar.save(d)
        back = lodsplat.Avatar.load(d)
        assert len(back) == len(avatar)
        assert back.pose()[5].raw() == avatar.pose()[5].raw()

    try:
        lodsplat.Mesh([(0.0, 0.0, 0.0)], [(0, 1, 2)])
    except lodsplat.LodsplatError as e:
        print("expected error:", e)
    else:
        raise AssertionError("invalid mesh accepted")
    print("ok")


if __name__ == "__main__":
    main()
