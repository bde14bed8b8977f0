"""Switch branches off and vary the head count on a small synthetic task.

Every variant trains from the same seed on the same split. At this scale the
task is easy enough that most variants saturate, so the point is the
mechanics of the switches rather than the ranking.
"""

from adlfusion.fusion import FusionModel, ModelConfig
from adlfusion.training import TrainConfig, evaluate, generate_synthetic, stratified_split, train

VARIANTS = {
    "full": {},
    "no pose attention": {"use_pose_attention": False},
    "no object context": {"use_object_context": False},
    "no pose features": {"use_pose_features": False},
}


def run(cfg, train_set, val_set, epochs):
    model = FusionModel(cfg, seed=0)
    train(model, train_set, val_set, TrainConfig(max_epochs=epochs, seed=0))
    return evaluate(model, val_set).metrics.mean_per_class


def main(epochs=30):
    base = ModelConfig.tiny(num_classes=4)
    data = generate_synthetic(base, samples_per_class=12, seed=3)
    train_set, val_set = stratified_split(data, 0.25, seed=3)
    print(f"{len(train_set)} train / {len(val_set)} val clips, {epochs} epochs max\n")
    for name, switches in VARIANTS.items():
        print(f"{name:20s} val mpca {run(base.with_(**switches), train_set, val_set, epochs):.3f}")
    print()
    for heads in (1, 2, 4, 8):
        score = run(base.with_(num_heads=heads), train_set, val_set, epochs)
        print(f"{f'{heads} head(s)':20s} val mpca {score:.3f}")


if __name__ == "__main__":
    main()
