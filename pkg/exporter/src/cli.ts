import yargs from 'yargs'
import { hideBin } from 'yargs/helpers'

import { runExport } from './export'

async function main(): Promise<number> {
  let argv = await yargs(hideBin(process.argv))
    .usage('Export multi-view CNN descriptors to .tkd teacher-knowledge files')
    .option('images', {
      type: 'string',
      demandOption: true,
      describe: 'directory with <shape_id>_v<k>.(ppm|png) view renders',
    })
    .option('out', {
      type: 'string',
      demandOption: true,
      describe: 'output directory for .tkd files',
    })
    .option('backbone', {
      type: 'string',
      default: 'tiny',
      describe: "'tiny' (built-in, seeded) or a path to a tfjs model.json",
    })
    .option('views', { type: 'number', default: 12, describe: 'views per shape (K)' })
    .option('ct', { type: 'number', default: 64, describe: 'descriptor channels for the built-in backbone' })
    .option('seed', { type: 'number', default: 7, describe: 'seed for the built-in backbone weights' })
    .strict()
    .parse()

  let written = await runExport({
    imagesDir: argv.images,
    outDir: argv.out,
    backbone: argv.backbone,
    views: argv.views,
    ct: argv.ct,
    seed: argv.seed,
  })
  console.log(`wrote ${written.length} teacher file(s) to ${argv.out}`)
  return 0
}

main()
  .then(code => process.exit(code))
  .catch(err => {
    console.error(`tkd-exporter: ${err.message}`)
    process.exit(2)
  })
