import sys

from ctnor.cli import main

sys.exit(main())
