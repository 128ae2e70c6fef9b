import sys

from leaftransfer.cli import main

sys.exit(main())
