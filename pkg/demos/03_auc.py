"""How the AUC is computed: out-of-class test images are the positives of the detector."""
import numpy as np

from ocgan import compute_auc

scores = np.array([0.1, 0.4, 0.35, 0.8])
labels = np.array([1, 1, 0, 0])  # 1 = known class, 0 = novel
roc, result = compute_auc(scores, labels)
print("fpr", roc.fpr, "tpr", roc.tpr)
print("AUC", result.auc, "trapezoid", roc.area())

# Ties between a novel and a known image count as half a correct ordering.
_, tied = compute_auc(np.zeros(4), labels)
print("all-tied AUC", tied.auc)

# Brute force over every (novel, known) pair gives the same number.
pos, neg = scores[labels == 0], scores[labels == 1]
pairs = [(p > n) + 0.5 * (p == n) for p in pos for n in neg]
print("pairwise", np.mean(pairs))
