public class Crime {
    private final String title;
    private final Location location;
    private final int reward;
    private boolean solved;

    public Crime(String title, Location location, int reward) {
        this.title = title;
        this.location = location;
        this.reward = reward;
        this.solved = false;
    }

    public String getTitle() {
        return title;
    }

    public Location getLocation() {
        return location;
    }

    public int getReward() {
        return reward;
    }

    public boolean isSolved() {
        return solved;
    }

    public void solve() {
        solved = true;
    }

    public void reopen() {
        solved = false;
    }
}
