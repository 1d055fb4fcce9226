"""Regenerate the synthetic edge-image fixtures used by configs and the README."""

from pathlib import Path

from src.artifacts.image_io import read_pgm
from src.data.dataset_builder import DegradationSpec, EdgeSetSpec, TrainingSetBuilder

OUT_DIR = Path('data/fixtures')

settings = {
    'gaussianC': DegradationSpec(blur='gaussianC', noise_sigma=0.01),
    'sr-x2-sr': DegradationSpec(blur='sr', noise_sigma=0.01, factor=2),
}
edges = EdgeSetSpec(count=8, size=32, seed=42)

for name, degradation in settings.items():
    builder = TrainingSetBuilder(degradation, random_state=edges.seed)
    train, test = builder.edge_sets(edges)
    builder.export_dataset(train, OUT_DIR / name, 'train')
    builder.export_dataset(test, OUT_DIR / name, 'test')
    print(f'✅ {name}: {len(train)} training and {len(test)} test pairs written')

# Verify the exported files
print('\nVerifying fixtures...')
for name in settings:
    for split in ('train', 'test'):
        truth = read_pgm(OUT_DIR / name / f'{split}_000_truth.pgm')
        data = read_pgm(OUT_DIR / name / f'{split}_000_data.pgm')
        print(f"{name:10s} {split:5s} truth {truth.shape}, data {data.shape}, "
              f"mean {truth.mean():.3f}")
