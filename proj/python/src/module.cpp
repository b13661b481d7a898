#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "manic/bootstrap.hpp"
#include "manic/contentment.hpp"
#include "manic/environment.hpp"
#include "manic/error.hpp"
#include "manic/learning_system.hpp"
#include "manic/metrics.hpp"
#include "manic/planner.hpp"

namespace py = pybind11;
using namespace manic;

namespace {

// Observation pixels as a (height, width, channels) float64 array.
py::array_t<double> frame_array(const Observation& x) {
  py::array_t<double> out({x.shape.height, x.shape.width, x.shape.channels});
  std::copy(x.pixels.data(), x.pixels.data() + x.pixels.size(), out.mutable_data());
  return out;
}

Observation array_frame(py::array_t<double, py::array::c_style | py::array::forcecast> a) {
  if (a.ndim() != 3) throw Error(ErrorKind::kShape, "frame array must be (height, width, channels)");
  FrameShape s{static_cast<std::size_t>(a.shape(1)), static_cast<std::size_t>(a.shape(0)),
               static_cast<std::size_t>(a.shape(2))};
  Vec p = Eigen::Map<const Vec>(a.data(), static_cast<Eigen::Index>(s.size()));
  return Observation(s, std::move(p));
}

Plan to_plan(const std::vector<Vec>& actions) { return Plan{actions}; }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "manic cognitive architecture";

  static py::exception<Error> manic_error(m, "ManicError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = manic_error;
      py::object inst = exc(e.what());
      inst.attr("kind") = to_string(e.kind());
      PyErr_SetObject(manic_error.ptr(), inst.ptr());
    }
  });

  py::class_<FrameShape>(m, "FrameShape")
      .def(py::init<>())
      .def(py::init([](std::size_t w, std::size_t h, std::size_t c) { return FrameShape{w, h, c}; }), py::arg("width"),
           py::arg("height"), py::arg("channels"))
      .def_readwrite("width", &FrameShape::width)
      .def_readwrite("height", &FrameShape::height)
      .def_readwrite("channels", &FrameShape::channels)
      .def("size", &FrameShape::size)
      .def(py::self == py::self)
      .def("__repr__", [](const FrameShape& s) {
        return "FrameShape(" + std::to_string(s.width) + ", " + std::to_string(s.height) + ", " +
               std::to_string(s.channels) + ")";
      });

  py::class_<Observation>(m, "Observation")
      .def(py::init(&array_frame), py::arg("pixels"))
      .def_readonly("shape", &Observation::shape)
      .def_property_readonly("pixels", [](const Observation& x) { return frame_array(x); })
      .def("at", py::overload_cast<std::size_t, std::size_t, std::size_t>(&Observation::at, py::const_));

  py::class_<ActionSpace>(m, "ActionSpace")
      .def_readonly("dims", &ActionSpace::dims)
      .def_readonly("discrete", &ActionSpace::discrete)
      .def_readonly("low", &ActionSpace::low)
      .def_readonly("high", &ActionSpace::high)
      .def("one_hot", &ActionSpace::one_hot)
      .def("valid", &ActionSpace::valid);

  py::class_<Approximator>(m, "Approximator")
      .def_static("create", &Approximator::create, py::arg("layer_sizes"), py::arg("seed"))
      .def_static("zeros", &Approximator::zeros, py::arg("layer_sizes"))
      .def_static("load_file", &Approximator::load_file)
      .def_property_readonly("layer_sizes", &Approximator::layer_sizes)
      .def_property_readonly("parameter_count", &Approximator::parameter_count)
      .def("forward", &Approximator::forward)
      .def("train_step", &Approximator::train_step, py::arg("input"), py::arg("target"), py::arg("learning_rate"))
      .def("input_gradient", &Approximator::input_gradient)
      .def("parameter_gradient", &Approximator::parameter_gradient)
      .def("parameters", &Approximator::parameters)
      .def("set_parameters", &Approximator::set_parameters)
      .def("hash", &Approximator::hash)
      .def("save_file", &Approximator::save_file)
      .def(py::self == py::self);

  py::class_<ModelTopology>(m, "ModelTopology")
      .def(py::init<>())
      .def_readwrite("transition_hidden", &ModelTopology::transition_hidden)
      .def_readwrite("decoder_hidden", &ModelTopology::decoder_hidden)
      .def_readwrite("encoder_hidden", &ModelTopology::encoder_hidden)
      .def_readwrite("with_encoder", &ModelTopology::with_encoder)
      .def_readwrite("encoder_downsample", &ModelTopology::encoder_downsample);

  py::class_<RefineOptions>(m, "RefineOptions")
      .def(py::init<>())
      .def_readwrite("steps", &RefineOptions::steps)
      .def_readwrite("rate", &RefineOptions::rate)
      .def_readwrite("pixels_per_step", &RefineOptions::pixels_per_step)
      .def_readwrite("seed", &RefineOptions::seed);

  py::class_<LearningSystem>(m, "LearningSystem")
      .def_static("create", &LearningSystem::create, py::arg("frame"), py::arg("belief_dims"), py::arg("action_dims"),
                  py::arg("topology") = ModelTopology{}, py::arg("seed") = 1)
      .def_static("load", &LearningSystem::load)
      .def("save", &LearningSystem::save)
      .def_property_readonly("frame", &LearningSystem::frame)
      .def_property_readonly("belief_dims", &LearningSystem::belief_dims)
      .def_property_readonly("action_dims", &LearningSystem::action_dims)
      .def_property_readonly("has_encoder", &LearningSystem::has_encoder)
      .def_property_readonly("transition", py::overload_cast<>(&LearningSystem::transition, py::const_))
      .def_property_readonly("decoder", py::overload_cast<>(&LearningSystem::decoder, py::const_))
      .def_property_readonly("encoder", py::overload_cast<>(&LearningSystem::encoder, py::const_))
      .def("predict_transition", &LearningSystem::predict_transition)
      .def("decode_pixel", &LearningSystem::decode_pixel)
      .def("decode_frame", [](const LearningSystem& ls, const Belief& v) { return frame_array(ls.decode_frame(v)); })
      .def("encode", &LearningSystem::encode)
      .def("refine_beliefs", &LearningSystem::refine_beliefs, py::arg("v_init"), py::arg("frame"),
           py::arg("options") = RefineOptions{})
      .def("rollout", [](const LearningSystem& ls, const Belief& v0, const std::vector<Vec>& plan) {
        return ls.rollout(v0, to_plan(plan));
      })
      .def("reconstruction_error", &LearningSystem::reconstruction_error);

  py::class_<Environment, std::unique_ptr<Environment>>(m, "Environment")
      .def_property_readonly("kind", &Environment::kind)
      .def_property_readonly("frame_shape", &Environment::frame_shape)
      .def_property_readonly("action_space", &Environment::action_space)
      .def_property_readonly("state", &Environment::state)
      .def("set_state", &Environment::set_state)
      .def("clone", &Environment::clone)
      .def("reset", &Environment::reset, py::arg("seed"))
      .def("step", &Environment::step)
      .def("step_index",
           [](Environment& env, std::size_t i) { return env.step(env.action_space().one_hot(i)); })
      .def("render", &Environment::render)
      .def("render_clean", &Environment::render_clean)
      .def("done", &Environment::done)
      .def("success", &Environment::success);

  m.def(
      "make_environment",
      [](const std::string& kind, std::uint64_t map_seed) {
        EnvironmentConfig c;
        c.kind = kind;
        c.map_seed = map_seed;
        return make_environment(c);
      },
      py::arg("kind"), py::arg("map_seed") = 0);

  py::class_<WalkDataset>(m, "WalkDataset")
      .def_static("load", &WalkDataset::load)
      .def("save", &WalkDataset::save)
      .def("__len__", &WalkDataset::size)
      .def_readonly("frame", &WalkDataset::frame)
      .def_readonly("action_dims", &WalkDataset::action_dims)
      .def_readonly("seed", &WalkDataset::seed)
      .def_readonly("observations", &WalkDataset::observations)
      .def_readonly("actions", &WalkDataset::actions)
      .def_readonly("true_states", &WalkDataset::true_states);

  m.def("collect_random_walk", &collect_random_walk, py::arg("env"), py::arg("steps"), py::arg("seed"));

  py::class_<NldrOptions>(m, "NldrOptions")
      .def(py::init<>())
      .def_readwrite("dims", &NldrOptions::dims)
      .def_readwrite("neighbors", &NldrOptions::neighbors)
      .def_readwrite("exact_limit", &NldrOptions::exact_limit)
      .def_readwrite("landmarks", &NldrOptions::landmarks);

  m.def(
      "estimate_beliefs",
      [](const WalkDataset& ds, const NldrOptions& o) { return estimate_beliefs(ds, o).beliefs; }, py::arg("walk"),
      py::arg("options") = NldrOptions{});

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("rate", &TrainConfig::rate)
      .def_readwrite("decay", &TrainConfig::decay)
      .def_readwrite("pixels_per_frame", &TrainConfig::pixels_per_frame)
      .def_readwrite("holdout", &TrainConfig::holdout)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("topology", &TrainConfig::topology);

  m.def(
      "pretrain",
      [](const WalkDataset& ds, const std::vector<Belief>& beliefs, const TrainConfig& c) {
        auto r = pretrain(ds, BeliefEstimates{beliefs}, c);
        return py::make_tuple(std::move(r.system), r.log.to_json().dump());
      },
      py::arg("walk"), py::arg("beliefs"), py::arg("config") = TrainConfig{});

  m.def("affine_r2", &affine_r2);
  m.def("spearman", &spearman);

  py::class_<ContentmentModel>(m, "ContentmentModel")
      .def(py::init<Approximator>())
      .def_static("create", &ContentmentModel::create, py::arg("belief_dims"), py::arg("hidden"), py::arg("seed"))
      .def_property_readonly("model", py::overload_cast<>(&ContentmentModel::model, py::const_))
      .def_property_readonly("belief_dims", &ContentmentModel::belief_dims)
      .def("__call__", &ContentmentModel::operator());

  m.def(
      "plan_utility",
      [](const ContentmentModel& cm, const std::vector<Belief>& b, double gamma) { return plan_utility(cm, b, gamma); },
      py::arg("model"), py::arg("beliefs"), py::arg("gamma") = kUtilityDiscount);
  m.def(
      "discounted_mean", [](const std::vector<double>& v, double gamma) { return discounted_mean(v, gamma); },
      py::arg("values"), py::arg("gamma") = kUtilityDiscount);

  py::class_<PlanPool>(m, "PlanPool")
      .def_static(
          "init",
          [](std::size_t size, std::size_t horizon, const ActionSpace& space, std::uint64_t seed) {
            return PlanPool::init(size, horizon, space, seed);
          },
          py::arg("size"), py::arg("horizon"), py::arg("space"), py::arg("seed"))
      .def("__len__", &PlanPool::size)
      .def_property_readonly("horizon", &PlanPool::horizon)
      .def_property_readonly("evaluated", &PlanPool::evaluated)
      .def("plan", [](const PlanPool& p, std::size_t i) { return p.plan(i).actions; })
      .def("scores", &PlanPool::scores)
      .def("elite_index", &PlanPool::elite_index)
      .def("elite_score", &PlanPool::elite_score)
      .def("evaluate", &PlanPool::evaluate)
      .def("refine", &PlanPool::refine, py::arg("ls"), py::arg("model"), py::arg("v0"), py::arg("iterations"))
      .def("choose_action", &PlanPool::choose_action)
      .def("advance", &PlanPool::advance)
      .def("hash", &PlanPool::hash);

  m.def("score_plan", [](const LearningSystem& ls, const ContentmentModel& cm, const Belief& v0,
                         const std::vector<Vec>& plan) { return score_plan(ls, cm, v0, to_plan(plan)); });
  m.def("enumerate_plans", [](const ActionSpace& space, std::size_t horizon) {
    std::vector<std::vector<Vec>> out;
    for (auto& p : enumerate_plans(space, horizon)) out.push_back(std::move(p.actions));
    return out;
  });
}
