//! Markdown reference generated from the argument definitions.

use clap::CommandFactory;

use crate::cli::Cli;
use crate::config::ENV_PREFIX;
use crate::error::exit;

fn arg_line(arg: &clap::Arg) -> Option<String> {
    if arg.is_hide_set() {
        return None;
    }
    let id = arg.get_id().as_str();
    if id == "help" || id == "version" {
        return None;
    }
    let name = match arg.get_long() {
        Some(l) => format!("--{l}"),
        None => format!("<{}>", id.to_uppercase()),
    };
    let takes_value = arg.get_num_args().is_some_and(|n| n.takes_values()) && !matches!(arg.get_action(), clap::ArgAction::SetTrue);
    let value = if takes_value && arg.get_long().is_some() {
        format!(" <{}>", id.to_uppercase())
    } else {
        String::new()
    };
    let mut line = format!("- `{name}{value}`");
    if let Some(help) = arg.get_help() {
        let help = help.to_string();
        let stop = if help.ends_with(['.', ')']) { "" } else { "." };
        line.push_str(&format!(": {help}{stop}"));
    }
    let possible: Vec<String> = arg.get_possible_values().iter().filter(|v| !v.is_hide_set()).map(|v| v.get_name().to_string()).collect();
    if takes_value && !possible.is_empty() {
        line.push_str(&format!(" One of: `{}`.", possible.join("`, `")));
    }
    let defaults: Vec<String> = arg.get_default_values().iter().map(|v| v.to_string_lossy().into_owned()).collect();
    if !defaults.is_empty() && takes_value {
        line.push_str(&format!(" Default: `{}`.", defaults.join(",")));
    }
    if arg.is_required_set() {
        line.push_str(" Required.");
    }
    Some(line)
}

fn section(cmd: &clap::Command, path: &str, out: &mut String) {
    let level = path.matches(' ').count() + 2;
    out.push_str(&format!("{} `{path}`\n\n", "#".repeat(level.min(4))));
    if let Some(about) = cmd.get_long_about().or(cmd.get_about()) {
        out.push_str(&format!("{about}\n\n"));
    }
    let args: Vec<String> = cmd.get_arguments().filter_map(arg_line).collect();
    if !args.is_empty() {
        out.push_str(&args.join("\n"));
        out.push_str("\n\n");
    }
    for sub in cmd.get_subcommands().filter(|s| s.get_name() != "help") {
        section(sub, &format!("{path} {}", sub.get_name()), out);
    }
}

/// The full reference page.
pub fn markdown() -> String {
    let mut cmd = Cli::command();
    cmd.build();
    let mut out = String::from("# Command-line reference\n\n");
    out.push_str("<!-- Generated by `surgassist reference`; do not edit. -->\n\n");
    if let Some(about) = cmd.get_about() {
        out.push_str(&format!("{about}\n\n"));
    }
    out.push_str("## Exit codes\n\n| Code | Meaning |\n|---|---|\n");
    for (code, meaning) in [
        (exit::OK, "success"),
        (exit::CHECK_FAILED, "a check ran and failed (gradient tolerance, minimum SR)"),
        (exit::USAGE, "unknown subcommand or flag, missing or malformed argument"),
        (exit::INPUT, "unreadable or invalid input file"),
        (exit::CONFIG, "invalid configuration"),
        (exit::RUNTIME, "runtime failure: port in use, storage or write error"),
    ] {
        out.push_str(&format!("| {code} | {meaning} |\n"));
    }
    out.push_str(&format!(
        "\nErrors are printed to stderr as `error[CATEGORY]: message`.\n\n\
         ## Configuration\n\n`serve` and `chat` read a TOML file given by `--config`. Every key can be \
         overridden by an environment variable: `{ENV_PREFIX}` plus the upper-cased key path with `__` \
         between levels, e.g. `{ENV_PREFIX}BACKEND__KIND=remote`.\n\n"
    ));
    for sub in cmd.get_subcommands().filter(|s| s.get_name() != "help") {
        section(sub, &format!("surgassist {}", sub.get_name()), &mut out);
    }
    while out.ends_with("\n\n") {
        out.pop();
    }
    out
}
