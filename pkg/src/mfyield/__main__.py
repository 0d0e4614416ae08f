import sys

from mfyield.cli import main

sys.exit(main())
