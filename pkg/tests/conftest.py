import numpy as np
import pytest
import trimesh

from catpose.assets import ModelAsset, TriangleMesh
from catpose.views import CameraIntrinsics


def to_mesh(tm):
    return TriangleMesh(np.asarray(tm.vertices), np.asarray(tm.faces))


def wedge_mesh(a=0.12, b=0.06, depth=0.04):
    """Right triangular prism: legs `a` along x and `b` along y, extruded
    `depth` along z. No rotational symmetry."""
    vertices = np.array([[0, 0, 0], [a, 0, 0], [0, b, 0],
                         [0, 0, depth], [a, 0, depth], [0, b, depth]],
                        dtype=np.float64)
    faces = np.array([[0, 2, 1], [3, 4, 5],
                      [0, 1, 4], [0, 4, 3],
                      [1, 2, 5], [1, 5, 4],
                      [2, 0, 3], [2, 3, 5]])
    return TriangleMesh(vertices, faces)


def l_shape_mesh(scale=1.0):
    """Two boxes forming an L, asymmetric in every axis."""
    long_bar = trimesh.creation.box(extents=(0.16, 0.04, 0.05))
    foot = trimesh.creation.box(extents=(0.04, 0.08, 0.05))
    foot.apply_translation((0.06, 0.06, 0.0))
    tm = trimesh.util.concatenate([long_bar, foot])
    return TriangleMesh(np.asarray(tm.vertices) * scale, np.asarray(tm.faces))


@pytest.fixture
def cube():
    return to_mesh(trimesh.creation.box(extents=(0.1, 0.1, 0.1)))


@pytest.fixture
def box():
    return to_mesh(trimesh.creation.box(extents=(0.2, 0.1, 0.05)))


@pytest.fixture
def wedge():
    return wedge_mesh()


@pytest.fixture
def icosphere():
    return to_mesh(trimesh.creation.icosphere(subdivisions=3, radius=0.05))


@pytest.fixture
def fixture_meshes(cube, wedge, icosphere):
    return {'cube': cube, 'wedge': wedge, 'icosphere': icosphere}


@pytest.fixture
def small_intrinsics():
    return CameraIntrinsics(fx=200.0, fy=200.0, cx=80.0, cy=60.0,
                            width=160, height=120)


@pytest.fixture
def model(wedge):
    return ModelAsset.from_mesh(wedge, 'Stapler', 'wedge_0000')


def write_obj(mesh, path):
    lines = [f'v {float(x)!r} {float(y)!r} {float(z)!r}'
             for x, y, z in mesh.vertices]
    lines += [f'f {a + 1} {b + 1} {c + 1}' for a, b, c in mesh.faces]
    path.write_text('\n'.join(lines) + '\n')
    return path


@pytest.fixture
def asset_tree(tmp_path):
    """Three asymmetric categories with two uniformly scaled instances
    each, stored as bare OBJ files."""
    root = tmp_path / 'assets'
    shapes = {'Stapler': wedge_mesh,
              'Pliers': l_shape_mesh,
              'Remote': lambda scale=1.0: wedge_mesh(0.10 * scale,
                                                     0.03 * scale,
                                                     0.07 * scale)}
    for category, make in shapes.items():
        folder = root / category
        folder.mkdir(parents=True)
        base = make()
        for i, scale in enumerate((1.0, 1.25)):
            mesh = TriangleMesh(base.vertices * scale, base.faces)
            write_obj(mesh, folder / f'{category.lower()}_{i:04d}.obj')
    return root
