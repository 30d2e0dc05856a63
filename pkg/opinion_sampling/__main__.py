import sys

from opinion_sampling.cli import main

sys.exit(main())
