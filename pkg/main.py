import sys

from scripts.platoon_experiments import main


if __name__ == "__main__":
    sys.exit(main())
