import sys

import quantrbp.cli

sys.exit(quantrbp.cli.main())
