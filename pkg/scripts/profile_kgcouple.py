import cProfile
import pstats
import sys
from kgcouple.main import run


def profile_run(experiment: str = "equilibrium"):
    cProfile.runctx(
        "run(experiment=experiment, out_dir='kgcouple_profile_out', quiet=True)",
        globals(),
        locals(),
        filename="kgcouple_profile.prof",
    )
    # Analyze results
    stats = pstats.Stats("kgcouple_profile.prof")
    stats.sort_stats("cumulative").print_stats("kgcouple", 20)  # Top 20 functions by cumulative time


if __name__ == "__main__":
    profile_run(*sys.argv[1:2])
