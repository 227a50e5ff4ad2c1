import numpy as np
import pytest

from proximesh.body import default_body


@pytest.fixture(scope="session")
def body():
    """Default 512-vertex humanoid, shared across the suite."""
    return default_body()


@pytest.fixture(scope="session")
def small_body():
    """Reduced-resolution humanoid for oracle-heavy tests."""
    return default_body(num_vertices=256)


def two_bone_body():
    """Minimal 2-joint chain with 4 vertices for hand-checked skinning.

    Joint 0 at the origin, joint 1 at (0, 0, 1). Vertices 0 and 1 are
    rigidly bound to joint 0, vertices 2 and 3 to joint 1, and both
    joint positions are recoverable as vertex-pair means.
    """
    from proximesh.body import BodyTemplate, Skeleton

    skeleton = Skeleton(
        ("root", "tip"),
        np.array([-1, 0]),
        np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]),
    )
    vertices = np.array(
        [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 1.0],
            [0.0, -1.0, 1.0],
        ]
    )
    template = BodyTemplate(
        vertices=vertices,
        faces=np.array([[0, 1, 2], [1, 2, 3], [0, 2, 3], [0, 1, 3]]),
        skin_weights=np.array(
            [
                [1.0, 0.0],
                [1.0, 0.0],
                [0.0, 1.0],
                [0.0, 1.0],
            ]
        ),
        joint_regressor=np.array(
            [
                [0.5, 0.5, 0.0, 0.0],
                [0.0, 0.0, 0.5, 0.5],
            ]
        ),
        shape_dirs=np.zeros((4, 3, 1)),
    )
    return skeleton, template
