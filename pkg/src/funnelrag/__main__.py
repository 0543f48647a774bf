from funnelrag.cli import main

raise SystemExit(main())
