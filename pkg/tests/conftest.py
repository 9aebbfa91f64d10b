import numpy as np
import pytest

from coattseg.episodes import DatasetIndex, generate_synthetic_dataset


def fake_static_index(classes, per_class=3):
    return DatasetIndex([
        {"class": c, "image_or_feature_path": f"{c}/{i}.ften", "mask_path": f"{c}/{i}.pgm"}
        for c in classes
        for i in range(per_class)
    ])


def fake_video_index(classes, sequences=2, frames=5, seed=0):
    """Sequences whose first frame holds the class; some also hold a second category."""
    rng = np.random.default_rng(seed)
    records = []
    for c in classes:
        for s in range(sequences):
            other = classes[rng.integers(len(classes))]
            for f in range(1, frames + 1):
                for label in {c, other}:
                    records.append({
                        "class": label,
                        "image_or_feature_path": f"{c}_{s}/{f}.ften",
                        "mask_path": f"{c}_{s}/{f}_{label}.pgm",
                        "sequence": f"{c}_{s}",
                        "frame": f * 5,  # non-contiguous raw frame numbers
                    })
    return DatasetIndex(records)


@pytest.fixture(scope="session")
def single_object_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth1")
    generate_synthetic_dataset(root, n_classes=4, items_per_class=4, size=16, seed=3)
    return root


@pytest.fixture(scope="session")
def two_object_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth2")
    generate_synthetic_dataset(root, n_classes=4, items_per_class=3, size=32, two_object=True, seed=4)
    return root
