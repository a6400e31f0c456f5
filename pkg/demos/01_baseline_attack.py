"""Shadow-model membership inference against an undefended speaker classifier.

Builds the default synthetic corpus, trains a target and a shadow SID network,
fits the attack on shadow posteriors and scores it on the target's own clips.
Takes about a minute on one core.
"""

import numpy as np

from speakermia import ExperimentSpec, Pipeline
from speakermia.attack import evaluate_attack
from speakermia.sid import evaluate_sid

pipeline = Pipeline(ExperimentSpec())
print(f"corpus: {len(pipeline.corpus.clips)} clips, digest {pipeline.corpus.digest()[:12]}")

target = pipeline.baseline_target(seed=0)
train_acc = evaluate_sid(target, pipeline.clips("target", "in_train"))
test_acc = evaluate_sid(target, pipeline.eval_clips("target"))
print(f"target accuracy: train {train_acc:.3f}, held-out {test_acc:.3f}")

attack, threshold = pipeline.attack(seed=0)
members, nonmembers = pipeline.pool("target", "attack_eval")
metrics = evaluate_attack(attack, threshold, target, members, nonmembers)
print(f"attack threshold {threshold:.3f}: accuracy {metrics.accuracy:.3f}, "
      f"precision {metrics.precision:.3f}, recall {metrics.recall:.3f}")

# members receive sharper posteriors than unseen clips; that is the whole signal
top1 = lambda clips: np.max(target.predict_proba(clips), axis=1)
print(f"mean top-1 posterior: members {top1(members).mean():.3f}, nonmembers {top1(nonmembers).mean():.3f}")
