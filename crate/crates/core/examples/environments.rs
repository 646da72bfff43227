//! The three tasks, their scripted controllers and normalized scoring.

use adrbc::envs::{evaluate, rollout, score_refs, Controller, ControllerActor, Env, Task};
use adrbc::rng::stream;
use adrbc::Result;

fn main() -> Result<()> {
    for task in Task::ALL {
        let refs = score_refs(task)?;
        println!(
            "{task}: obs {} act {} horizon {}  random return {:.2}  expert return {:.2}",
            task.obs_dim(),
            task.act_dim(),
            task.horizon(),
            refs.random_return,
            refs.expert_return
        );
        for c in ["scripted-expert", "noisy-expert(0.3)", "noisy-expert(1.0)", "random"] {
            let mut actor = ControllerActor::new(Controller::parse(c)?);
            let s = evaluate(&mut actor, task, 100, 5, &refs)?;
            println!("  {c:<18} score {:>7.1} ± {:.1}", s.mean, s.std);
        }
    }

    let mut env = Env::new(Task::PointMass2d, 3);
    let mut actor = ControllerActor::new(Controller::ScriptedExpert);
    let traj = rollout(&mut env, &mut actor, &mut stream(3, 1))?;
    let first = &traj.transitions()[0];
    println!("one expert episode: {} steps, return {:.3}, first obs {:?}", traj.len(), traj.ret(), first.obs);
    Ok(())
}
