use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command as App};
use perimeter_guard::{exit_code, run, Command, Settings};

fn app() -> App {
    let mut app = App::new("perimeter-guard")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Perimeter-defense imitation pipeline")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for cmd in Command::ALL {
        let mut sub = App::new(cmd.name()).about(cmd.about()).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key = value settings; flags take precedence"),
        );
        for key in cmd.keys() {
            // clap wants 'static names; the table is built once per process
            let flag: &'static str = Box::leak(key.name.replace('_', "-").into_boxed_str());
            let help = if key.default.is_empty() {
                key.help.to_string()
            } else {
                format!("{} [default: {}]", key.help, key.default)
            };
            sub = sub.arg(
                Arg::new(key.name)
                    .long(flag)
                    .value_name("VALUE")
                    .action(ArgAction::Set)
                    .allow_hyphen_values(true)
                    .help(help),
            );
        }
        app = app.subcommand(sub);
    }
    app
}

fn flags(cmd: Command, m: &ArgMatches) -> Vec<(String, String)> {
    cmd.keys()
        .iter()
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
        .collect()
}

fn main() -> ExitCode {
    let matches = app().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let cmd = Command::ALL
        .into_iter()
        .find(|c| c.name() == name)
        .expect("registered subcommand");
    let config = sub.get_one::<String>("config").map(PathBuf::from);
    let result = Settings::load(cmd, config.as_deref(), &flags(cmd, sub)).and_then(|s| run(&s));
    match result {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("perimeter-guard {name}: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
