import sys

from deepicf.cli import main

sys.exit(main())
