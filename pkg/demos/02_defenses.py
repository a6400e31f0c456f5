"""One seed of every defense against the same shadow-trained attack.

Prints one line per defense with target train/test accuracy and attack accuracy.
Takes a few minutes on one core.
"""

from speakermia import ExperimentSpec, GridEntry, Pipeline
from speakermia.harness import percent_table, run_experiment

spec = ExperimentSpec(seeds=(0,), grid=(
    GridEntry("baseline", (0.0, 0.01)),
    GridEntry("obfuscation", ("topk:1", "rank")),
    GridEntry("adversarial_regularization", (3.0,)),
    GridEntry("distillation", (100.0,)),
    GridEntry("key", (0.5,)),
))
result = run_experiment(spec, Pipeline(spec))
print(percent_table(result.rows))
for failure in result.failures:
    print("failed:", failure)

# the keyed model answers clean (unkeyed) queries with random posteriors
for name, extra in result.extras.items():
    if name.startswith("key|"):
        print(f"key detector validation accuracy {extra['detector_val_acc']:.3f}; "
              f"accuracy on clean inputs {extra['clean_input_test_acc']:.3f}")
