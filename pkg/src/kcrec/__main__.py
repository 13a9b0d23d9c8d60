import sys

from kcrec.cli import main

sys.exit(main())
