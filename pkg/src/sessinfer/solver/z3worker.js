// Persistent SMT-LIB2 evaluation worker backed by the z3-solver WASM build.
//
// Protocol (line oriented, over stdin/stdout):
//   -> one line containing the path of an .smt2 file
//   <- the solver output, followed by a line "===DONE==="
// The worker prints "READY" once initialised.  Each request is evaluated in
// a fresh context so requests are independent.

const fs = require('fs');

(async () => {
  const { init } = require('z3-solver');
  const { Z3 } = await init();
  const cfg = Z3.mk_config();
  process.stdout.write('READY\n');
  let buf = '';
  let queue = Promise.resolve();
  process.stdin.on('data', (d) => {
    buf += d.toString();
    let i;
    while ((i = buf.indexOf('\n')) >= 0) {
      const line = buf.slice(0, i).trim();
      buf = buf.slice(i + 1);
      if (!line) continue;
      queue = queue.then(async () => {
        let out;
        const ctx = Z3.mk_context(cfg);
        try {
          const script = fs.readFileSync(line, 'utf8');
          out = await Z3.eval_smtlib2_string(ctx, script);
        } catch (e) {
          out = 'error ' + String(e).split('\n')[0];
        }
        Z3.del_context(ctx);
        process.stdout.write(out.trimEnd() + '\n===DONE===\n');
      });
    }
  });
  process.stdin.on('end', () => process.exit(0));
})();
