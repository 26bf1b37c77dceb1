"""Grid differentials of smooth maps converge to the metric differential.

Prints the error table for a map onto a circle; chord-versus-arc errors
shrink with the square of the step, so the order column reads about 2.
The straight axis is exact at every step.
"""

from metdiff import kirchheim as kh

entry = kh.get_entry("circle", 2)
rows = kh.convergence_table(entry, 2)
print(kh.rows_to_csv(rows), end="")

linear = kh.convergence_table(kh.get_entry("linear_linf", 2), 2)
print("linear l^inf entry, max error:", max(r.max_error for r in linear))
